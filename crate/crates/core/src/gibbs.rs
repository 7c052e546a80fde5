//! Exact Gibbs measure `G(σ) = exp(β X_σ) / Z` by enumeration.
//!
//! Tables are built from the exact level scan: every configuration whose
//! log-weight lies within a gap of a reference configuration is kept, with
//! the gap chosen so the dropped configurations (each lighter than
//! `exp(β level)`) carry at most [`TRUNCATION_TOL`] of the mass. At
//! moderate `β` and small `N` this keeps every configuration.
//!
//! Without the perturbation the measure is a product of two block measures
//! and [`ProductGibbs`] gives the same brackets in `O(2^{N/2})`.

use std::sync::OnceLock;

use rand::Rng;

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::model::{Configuration, DisorderRealization, ModelParams, Overlap};
use crate::observable::ArrayObservable;
use crate::parallel::try_map_seeds;
use crate::rng::substream;
use crate::scan::{for_each_above, reference_energy, ScanOrder};
use crate::stats::Estimate;
use std::f64::consts::LN_2;

/// Largest `N` for which a weight table may be built.
pub const TABLE_N_CAP: u32 = 26;
/// Bound on the relative Gibbs mass of the configurations left out of a table.
pub const TRUNCATION_TOL: f64 = 1e-12;
/// Slack used when comparing overlap distances.
pub const ULTRAMETRIC_TOL: f64 = 1e-12;

#[derive(Debug)]
pub struct GibbsTable {
    params: ModelParams,
    seed: u64,
    beta: f64,
    idx: Vec<u64>,
    prob: Vec<f64>,
    log_z: f64,
    dropped_bound: f64,
    alias: OnceLock<AliasTable>,
}

fn check_cap(p: &ModelParams) -> Result<()> {
    if p.n > TABLE_N_CAP.min(p.cap) {
        return Err(Error::CapExceeded {
            n: p.n,
            cap: TABLE_N_CAP.min(p.cap),
        });
    }
    Ok(())
}

/// `log Σ exp(x)` with the maximum factored out.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GibbsTable {
    /// Gibbs measure of `r` at inverse temperature `beta`, with or without
    /// the perturbation field.
    pub fn build(r: &DisorderRealization, beta: f64, perturbed: bool) -> Result<Self> {
        let p = *r.params();
        check_cap(&p)?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("beta", "must be finite and >= 0"));
        }
        let order = ScanOrder::new(r);
        let total = p.num_configs() as f64;
        let e_ref = reference_energy(r, &order, perturbed);
        // Every dropped weight is below exp(-gap) times a weight that is in
        // the table, so this gap needs a single pass; the loop only guards
        // rounding.
        let mut gap = (total / TRUNCATION_TOL).ln();
        loop {
            let level = if beta == 0.0 {
                f64::NEG_INFINITY
            } else {
                e_ref - gap / beta
            };
            let mut idx = Vec::new();
            let mut log_w = Vec::new();
            for_each_above(r, &order, perturbed, level, |i, e| {
                idx.push(i);
                log_w.push(beta * e);
            });
            let mut table = Self::assemble(p, r.seed(), beta, idx, log_w, 0.0);
            let missing = total - table.len() as f64;
            if missing > 0.0 {
                table.dropped_bound = (missing.ln() + beta * level - table.log_z).exp();
            }
            if table.dropped_bound <= TRUNCATION_TOL {
                return Ok(table);
            }
            gap += (table.dropped_bound / TRUNCATION_TOL).ln() + 1.0;
        }
    }

    /// Gibbs measure with arbitrary log-weights on all `2^N` configurations,
    /// indexed by flat configuration index.
    pub fn from_log_weights(params: ModelParams, seed: u64, beta: f64, log_w: Vec<f64>) -> Result<Self> {
        check_cap(&params)?;
        if log_w.len() != params.num_configs() {
            return Err(Error::invalid("need one log-weight per configuration"));
        }
        if log_w.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::invalid("log-weights must be finite or -inf"));
        }
        let idx = (0..log_w.len() as u64).collect();
        Ok(Self::assemble(params, seed, beta, idx, log_w, 0.0))
    }

    /// Normalizes in place: one `exp` per entry, shifted by the maximum.
    fn assemble(params: ModelParams, seed: u64, beta: f64, idx: Vec<u64>, mut w: Vec<f64>, dropped_bound: f64) -> Self {
        let m = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for x in w.iter_mut() {
            *x = (*x - m).exp();
            total += *x;
        }
        for x in w.iter_mut() {
            *x /= total;
        }
        Self {
            params,
            seed,
            beta,
            idx,
            prob: w,
            log_z: m + total.ln(),
            dropped_bound,
            alias: OnceLock::new(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn free_energy(&self) -> f64 {
        self.log_z / f64::from(self.params.n)
    }

    /// Upper bound on the relative mass of configurations not in the table.
    pub fn dropped_mass_bound(&self) -> f64 {
        self.dropped_bound
    }

    /// Number of configurations stored.
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn indices(&self) -> &[u64] {
        &self.idx
    }

    /// Gibbs probabilities, aligned with [`indices`](Self::indices).
    pub fn probabilities(&self) -> &[f64] {
        &self.prob
    }

    /// `(configuration, probability)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (Configuration, f64)> + '_ {
        let half = self.params.half();
        self.idx
            .iter()
            .zip(&self.prob)
            .map(move |(&i, &p)| (Configuration::from_index(i, half), p))
    }

    /// `Σ G(σ) h(σ)`.
    pub fn expect(&self, mut h: impl FnMut(u64) -> f64) -> f64 {
        self.idx.iter().zip(&self.prob).map(|(&i, &p)| p * h(i)).sum()
    }

    /// Block marginals `(R(σ1), C(σ2))`.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.params.block_size();
        let half = self.params.half();
        let (mut rows, mut cols) = (vec![0.0; m], vec![0.0; m]);
        for (&i, &p) in self.idx.iter().zip(&self.prob) {
            rows[(i >> half) as usize] += p;
            cols[(i & ((1 << half) - 1)) as usize] += p;
        }
        (rows, cols)
    }

    /// `Σ G(σ)^2`, the two-replica probability of `q = 1`.
    pub fn self_overlap(&self) -> f64 {
        self.prob.iter().map(|p| p * p).sum()
    }

    /// Exact two-replica overlap law, indexed by [`Overlap::bin`].
    pub fn overlap_distribution(&self) -> [f64; 4] {
        let (rows, cols) = self.marginals();
        self.overlap_distribution_from(&rows, &cols)
    }

    fn overlap_distribution_from(&self, rows: &[f64], cols: &[f64]) -> [f64; 4] {
        let p1 = self.self_overlap();
        let same_first: f64 = rows.iter().map(|r| r * r).sum();
        let same_second: f64 = cols.iter().map(|c| c * c).sum();
        let pa1 = (same_first - p1).max(0.0);
        let pa2 = (same_second - p1).max(0.0);
        let p0 = (1.0 - p1 - pa1 - pa2).max(0.0);
        [p0, pa2, pa1, p1]
    }

    /// Exact `G^{⊗3}(d(σ1, σ2) > max(d(σ1, σ3), d(σ2, σ3)))`.
    ///
    /// On this geometry the inequality fails only when `σ1`, `σ2` differ in
    /// both blocks and `σ3` shares its first block with one of them and its
    /// second block with the other, so the rate is
    /// `2 Σ_σ G(σ) (R(σ1) - G(σ)) (C(σ2) - G(σ))`.
    pub fn ultrametric_violation(&self) -> f64 {
        let (rows, cols) = self.marginals();
        self.ultrametric_violation_from(&rows, &cols)
    }

    fn ultrametric_violation_from(&self, rows: &[f64], cols: &[f64]) -> f64 {
        let half = self.params.half();
        let v: f64 = self
            .idx
            .iter()
            .zip(&self.prob)
            .map(|(&i, &g)| {
                let r = rows[(i >> half) as usize] - g;
                let c = cols[(i & ((1 << half) - 1)) as usize] - g;
                g * r.max(0.0) * c.max(0.0)
            })
            .sum();
        2.0 * v
    }

    fn alias(&self) -> &AliasTable {
        self.alias
            .get_or_init(|| AliasTable::new(&self.prob).expect("Gibbs probabilities are a valid law"))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let k = self.alias().sample(rng);
        Configuration::from_index(self.idx[k], self.params.half())
    }

    /// `s` independent replicas.
    pub fn sample_replicas<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Result<Vec<Configuration>> {
        if s < 1 {
            return Err(Error::invalid("need at least one replica"));
        }
        Ok((0..s).map(|_| self.sample(rng)).collect())
    }
}

/// Gibbs measure of the unperturbed energies, `g1 ⊗ g2`.
#[derive(Clone, Debug)]
pub struct ProductGibbs {
    n: u32,
    a1: f64,
    log_z: f64,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

impl ProductGibbs {
    pub fn new(r: &DisorderRealization, beta: f64) -> Self {
        let block = |x: &[f64]| {
            let lz = block_log_partition(x, beta);
            (lz, x.iter().map(|v| (beta * v - lz).exp()).collect::<Vec<_>>())
        };
        let (lz1, g1) = block(r.block1());
        let (lz2, g2) = block(r.block2());
        Self {
            n: r.params().n,
            a1: r.params().a1,
            log_z: lz1 + lz2,
            g1,
            g2,
        }
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn free_energy(&self) -> f64 {
        self.log_z / f64::from(self.n)
    }

    pub fn block_laws(&self) -> (&[f64], &[f64]) {
        (&self.g1, &self.g2)
    }

    pub fn overlap_distribution(&self) -> [f64; 4] {
        let s1: f64 = self.g1.iter().map(|g| g * g).sum();
        let s2: f64 = self.g2.iter().map(|g| g * g).sum();
        let p1 = s1 * s2;
        let pa1 = s1 - p1;
        let pa2 = s2 - p1;
        [(1.0 - p1 - pa1 - pa2).max(0.0), pa2, pa1, p1]
    }

    /// `2 Σ g1²(1 - g1) · Σ g2²(1 - g2)`, the product form of the
    /// violation rate of [`GibbsTable::ultrametric_violation`].
    pub fn ultrametric_violation(&self) -> f64 {
        let m = |g: &[f64]| g.iter().map(|x| x * x * (1.0 - x)).sum::<f64>();
        2.0 * m(&self.g1) * m(&self.g2)
    }

    pub fn mean_overlap(&self) -> f64 {
        let h = self.overlap_distribution();
        Overlap::ALL.iter().map(|o| h[o.bin()] * o.value(self.a1)).sum()
    }
}

/// Exact per-seed brackets: two-replica overlap law, violation rate and
/// free energy. Uses the product form when the perturbation is off or zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedBrackets {
    pub histogram: [f64; 4],
    pub violation: f64,
    pub free_energy: f64,
}

pub fn seed_brackets(r: &DisorderRealization, beta: f64, perturbed: bool) -> Result<SeedBrackets> {
    check_cap(r.params())?;
    if !perturbed || r.perturbation_sd() == 0.0 {
        let g = ProductGibbs::new(r, beta);
        return Ok(SeedBrackets {
            histogram: g.overlap_distribution(),
            violation: g.ultrametric_violation(),
            free_energy: g.free_energy(),
        });
    }
    let g = GibbsTable::build(r, beta, perturbed)?;
    let (rows, cols) = g.marginals();
    Ok(SeedBrackets {
        histogram: g.overlap_distribution_from(&rows, &cols),
        violation: g.ultrametric_violation_from(&rows, &cols),
        free_energy: g.free_energy(),
    })
}

/// Log-partition function of a single block, `log Σ exp(β x)`.
pub fn block_log_partition(x: &[f64], beta: f64) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| beta * v).collect();
    log_sum_exp(&w)
}

pub fn log_partition(r: &DisorderRealization, beta: f64, perturbed: bool) -> Result<f64> {
    Ok(GibbsTable::build(r, beta, perturbed)?.log_partition())
}

pub fn free_energy(r: &DisorderRealization, beta: f64, perturbed: bool) -> Result<f64> {
    Ok(GibbsTable::build(r, beta, perturbed)?.free_energy())
}

/// Large-N free energy of one block of variance `N a`.
fn block_free_energy(a: f64, beta: f64) -> f64 {
    let bc = (LN_2 / a).sqrt();
    if beta <= bc {
        LN_2 / 2.0 + beta * beta * a / 2.0
    } else {
        beta * (a * LN_2).sqrt()
    }
}

/// Limiting free energy `f(β)`, the sum of the two block REM free energies.
pub fn analytic_free_energy(beta: f64, p: &ModelParams) -> f64 {
    block_free_energy(p.a1, beta) + block_free_energy(p.a2(), beta)
}

/// `d(σ1, σ2) > max(d(σ1, σ3), d(σ2, σ3))` up to [`ULTRAMETRIC_TOL`].
pub fn violates_ultrametric(a1: f64, q12: Overlap, q13: Overlap, q23: Overlap) -> bool {
    let d = |q: Overlap| (1.0 - q.value(a1)).max(0.0).sqrt();
    d(q12) > d(q13).max(d(q23)) + ULTRAMETRIC_TOL
}

fn realization(p: &ModelParams, seed: u64) -> DisorderRealization {
    DisorderRealization::new(*p, seed)
}

/// Disorder average of `⟨f⟩` over `s` replicas, `n_draws` replica tuples per
/// disorder seed. `f` may read replicas `1..=s`.
pub fn overlap_observable(
    p: &ModelParams,
    perturbed: bool,
    f: &ArrayObservable,
    s: usize,
    n_seeds: u64,
    n_draws: u64,
    master: u64,
) -> Result<Estimate> {
    if s < 2 || f.arity() > s {
        return Err(Error::config("s", "need s >= 2 replicas covering the observable"));
    }
    let name = f.to_string();
    let per_seed = try_map_seeds(master, n_seeds, |i, seed| {
        let g = GibbsTable::build(&realization(p, seed), p.beta, perturbed)?;
        let mut rng = substream(master, "overlap_observable", i, "replicas");
        let mut acc = 0.0;
        for _ in 0..n_draws {
            let reps = g.sample_replicas(s, &mut rng)?;
            acc += f.eval(p.a1, |a, b| Overlap::between(reps[a - 1], reps[b - 1]));
        }
        Ok(acc / n_draws.max(1) as f64)
    })?;
    Ok(Estimate::from_samples(name, per_seed))
}

pub const HISTOGRAM_NAMES: [&str; 4] = ["P(q=0)", "P(q=a2)", "P(q=a1)", "P(q=1)"];

/// Per-seed two-replica overlap law: exact when `n_pairs == 0`, otherwise
/// the empirical law of `n_pairs` sampled replica pairs.
pub fn seed_overlap_histogram<R: Rng + ?Sized>(g: &GibbsTable, n_pairs: u64, rng: &mut R) -> [f64; 4] {
    if n_pairs == 0 {
        return g.overlap_distribution();
    }
    let mut h = [0.0; 4];
    for _ in 0..n_pairs {
        let (s, t) = (g.sample(rng), g.sample(rng));
        h[Overlap::between(s, t).bin()] += 1.0;
    }
    h.map(|c| c / n_pairs as f64)
}

/// Disorder-averaged overlap histogram over `{0, a2, a1, 1}`.
pub fn overlap_histogram(
    p: &ModelParams,
    perturbed: bool,
    n_seeds: u64,
    n_pairs: u64,
    master: u64,
) -> Result<[Estimate; 4]> {
    let per_seed = try_map_seeds(master, n_seeds, |i, seed| {
        let r = realization(p, seed);
        if n_pairs == 0 {
            return Ok(seed_brackets(&r, p.beta, perturbed)?.histogram);
        }
        let g = GibbsTable::build(&r, p.beta, perturbed)?;
        let mut rng = substream(master, "overlap_histogram", i, "replicas");
        Ok(seed_overlap_histogram(&g, n_pairs, &mut rng))
    })?;
    Ok(std::array::from_fn(|b| {
        Estimate::from_samples(HISTOGRAM_NAMES[b], per_seed.iter().map(|h| h[b]))
    }))
}

/// Per-seed violation rate: exact when `n_triples == 0`, otherwise sampled.
pub fn seed_violation_rate<R: Rng + ?Sized>(g: &GibbsTable, n_triples: u64, rng: &mut R) -> f64 {
    if n_triples == 0 {
        return g.ultrametric_violation();
    }
    let a1 = g.params().a1;
    let mut hits = 0u64;
    for _ in 0..n_triples {
        let (s1, s2, s3) = (g.sample(rng), g.sample(rng), g.sample(rng));
        let bad = violates_ultrametric(
            a1,
            Overlap::between(s1, s2),
            Overlap::between(s1, s3),
            Overlap::between(s2, s3),
        );
        hits += u64::from(bad);
    }
    hits as f64 / n_triples as f64
}

pub fn ultrametric_violation_rate(
    p: &ModelParams,
    perturbed: bool,
    n_seeds: u64,
    n_triples: u64,
    master: u64,
) -> Result<Estimate> {
    let per_seed = try_map_seeds(master, n_seeds, |i, seed| {
        let r = realization(p, seed);
        if n_triples == 0 {
            return Ok(seed_brackets(&r, p.beta, perturbed)?.violation);
        }
        let g = GibbsTable::build(&r, p.beta, perturbed)?;
        let mut rng = substream(master, "ultrametric", i, "replicas");
        Ok(seed_violation_rate(&g, n_triples, &mut rng))
    })?;
    Ok(Estimate::from_samples("violation_rate", per_seed))
}

/// Disorder average of the free energy `(1/N) log Z`.
pub fn mean_free_energy(p: &ModelParams, perturbed: bool, n_seeds: u64, master: u64) -> Result<Estimate> {
    let per_seed = try_map_seeds(master, n_seeds, |_, seed| {
        Ok(seed_brackets(&realization(p, seed), p.beta, perturbed)?.free_energy)
    })?;
    Ok(Estimate::from_samples("free_energy", per_seed))
}

/// Per-seed `f_{δ,N} - f_N` on common block fields.
pub fn free_energy_shift(p: &ModelParams, n_seeds: u64, master: u64) -> Result<Estimate> {
    let per_seed = try_map_seeds(master, n_seeds, |_, seed| {
        let r = realization(p, seed);
        Ok(seed_brackets(&r, p.beta, true)?.free_energy - seed_brackets(&r, p.beta, false)?.free_energy)
    })?;
    Ok(Estimate::from_samples("free_energy_shift", per_seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_weights(r: &DisorderRealization, beta: f64, perturbed: bool) -> Vec<f64> {
        let n = r.params().num_configs() as u64;
        let lw: Vec<f64> = (0..n).map(|i| beta * r.energy_at(i, perturbed)).collect();
        let lz = log_sum_exp(&lw);
        lw.iter().map(|w| (w - lz).exp()).collect()
    }

    #[test]
    fn uniform_hook() {
        let p = ModelParams::standard(10, 3.0).unwrap();
        let g = GibbsTable::build(&DisorderRealization::flat(p), 3.0, true).unwrap();
        assert_eq!(g.len(), 1024);
        assert!((g.log_partition() - 10.0 * LN_2).abs() < 1e-12);
        assert!((g.free_energy() - LN_2).abs() < 1e-14);
    }

    #[test]
    fn probabilities_are_normalized() {
        for (n, beta) in [(8, 0.0), (12, 1.0), (16, 2.0), (20, 3.0)] {
            let p = ModelParams::standard(n, beta).unwrap();
            let g = GibbsTable::build(&DisorderRealization::new(p, 7), beta, true).unwrap();
            let s: f64 = g.probabilities().iter().sum();
            let tol = p.num_configs() as f64 * f64::EPSILON * 64.0;
            assert!((s - 1.0).abs() <= tol, "n={n}: {s}");
            assert!(g.dropped_mass_bound() <= TRUNCATION_TOL);
        }
    }

    #[test]
    fn product_structure_at_zero_delta() {
        for seed in 0..5 {
            let p = ModelParams::standard(16, 2.0).unwrap().with_delta(0.0).unwrap();
            let r = DisorderRealization::new(p, seed);
            let lz = log_partition(&r, 2.0, true).unwrap();
            let blocks = block_log_partition(r.block1(), 2.0) + block_log_partition(r.block2(), 2.0);
            assert!((lz - blocks).abs() <= 1e-9 * blocks.abs());
        }
    }

    #[test]
    fn truncated_table_matches_brute_force() {
        for (n, beta, seed) in [(12, 2.0, 1), (14, 4.0, 2), (14, 0.5, 3)] {
            let p = ModelParams::standard(n, beta).unwrap();
            let r = DisorderRealization::new(p, seed);
            let full = brute_weights(&r, beta, true);
            let g = GibbsTable::build(&r, beta, true).unwrap();
            let mut seen = 0.0;
            for (&i, &q) in g.indices().iter().zip(g.probabilities()) {
                assert!((q - full[i as usize]).abs() <= 1e-12 * full[i as usize].max(1e-300) + 1e-15);
                seen += full[i as usize];
            }
            assert!(1.0 - seen <= 1e-13);
        }
    }

    #[test]
    fn zero_delta_limit_is_continuous() {
        let base = ModelParams::standard(12, 1.5).unwrap();
        let f0 = free_energy(&DisorderRealization::new(base.with_delta(0.0).unwrap(), 4), 1.5, false).unwrap();
        let mut prev = f64::INFINITY;
        for d in [1e-1, 1e-2, 1e-3, 1e-4, 1e-6] {
            let r = DisorderRealization::new(base.with_delta(d).unwrap(), 4);
            let gap = (free_energy(&r, 1.5, true).unwrap() - f0).abs();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn analytic_free_energy_values() {
        let p = ModelParams::standard(8, 1.0).unwrap();
        assert!((analytic_free_energy(0.0, &p) - LN_2).abs() < 1e-15);
        let want = 2.0 * ((0.6 * LN_2).sqrt() + (0.4 * LN_2).sqrt());
        assert!((analytic_free_energy(2.0, &p) - want).abs() < 1e-12);
        assert!((want - 2.342_895_596_622_446).abs() < 1e-12);
        for a in [0.6, 0.4] {
            let bc = (LN_2 / a).sqrt();
            let high = LN_2 / 2.0 + bc * bc * a / 2.0;
            let low = bc * (a * LN_2).sqrt();
            assert!((high - low).abs() <= 1e-12);
            assert!((block_free_energy(a, bc + 1e-9) - block_free_energy(a, bc)).abs() < 1e-8);
        }
    }

    /// Brute-force overlap law, self-overlap and violation rate at N = 8.
    #[test]
    fn exact_brackets_match_enumeration() {
        let p = ModelParams::standard(8, 1.7).unwrap();
        let r = DisorderRealization::new(p, 12);
        let w = brute_weights(&r, 1.7, true);
        let g = GibbsTable::build(&r, 1.7, true).unwrap();
        assert_eq!(g.len(), 256);
        let cfg = |i: usize| Configuration::from_index(i as u64, 4);
        let mut hist = [0.0; 4];
        let mut viol = 0.0;
        for a in 0..256 {
            for b in 0..256 {
                let qab = Overlap::between(cfg(a), cfg(b));
                hist[qab.bin()] += w[a] * w[b];
                for c in 0..256 {
                    let bad = violates_ultrametric(
                        p.a1,
                        qab,
                        Overlap::between(cfg(a), cfg(c)),
                        Overlap::between(cfg(b), cfg(c)),
                    );
                    if bad {
                        viol += w[a] * w[b] * w[c];
                    }
                }
            }
        }
        let got = g.overlap_distribution();
        for k in 0..4 {
            assert!((got[k] - hist[k]).abs() < 1e-12, "bin {k}");
        }
        assert_eq!(got[3], g.self_overlap());
        assert!((g.ultrametric_violation() - viol).abs() < 1e-12);
        assert!(viol > 0.0);
    }

    #[test]
    fn uniform_overlap_law_by_counting() {
        let n = 8;
        let p = ModelParams::standard(n, 0.0).unwrap();
        let g = GibbsTable::build(&DisorderRealization::new(p, 3), 0.0, true).unwrap();
        let h = 2f64.powi(-(n as i32) / 2);
        let full = 2f64.powi(-(n as i32));
        let want = [1.0 - 2.0 * h + full, h - full, h - full, full];
        let got = g.overlap_distribution();
        for k in 0..4 {
            assert!((got[k] - want[k]).abs() < 1e-14);
        }
        // E<q12> under the uniform law.
        let q_mean: f64 = (0..4).map(|k| got[k] * Overlap::ALL[k].value(0.6)).sum();
        assert!((q_mean - (0.4 * (h - full) + 0.6 * (h - full) + full)).abs() < 1e-15);
    }

    #[test]
    fn single_configuration_measure_is_ultrametric() {
        let p = ModelParams::standard(8, 1.0).unwrap();
        let mut lw = vec![f64::NEG_INFINITY; 256];
        lw[77] = 0.0;
        let g = GibbsTable::from_log_weights(p, 0, 1.0, lw).unwrap();
        assert_eq!(g.ultrametric_violation(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(seed_violation_rate(&g, 1000, &mut rng), 0.0);
        assert_eq!(g.overlap_distribution()[3], 1.0);
    }

    #[test]
    fn uniform_sampling_chi_square() {
        let p = ModelParams::standard(8, 2.0).unwrap();
        let g = GibbsTable::build(&DisorderRealization::flat(p), 2.0, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000;
        let mut counts = vec![0u64; 256];
        for _ in 0..draws {
            counts[g.sample(&mut rng).index(4) as usize] += 1;
        }
        let e = draws as f64 / 256.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99% quantile of chi-square with 255 degrees of freedom.
        assert!(chi2 < 310.457, "{chi2}");
    }

    #[test]
    fn zero_delta_marginal_is_block_gibbs() {
        let p = ModelParams::standard(12, 1.2).unwrap().with_delta(0.0).unwrap();
        let r = DisorderRealization::new(p, 8);
        let g = GibbsTable::build(&r, 1.2, true).unwrap();
        let lz1 = block_log_partition(r.block1(), 1.2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let draws = 1_000_000;
        let m = p.block_size();
        let mut rows = vec![0.0; m];
        let mut joint = std::collections::HashMap::<(u64, u64), f64>::new();
        let mut cols = vec![0.0; m];
        for _ in 0..draws {
            let s = g.sample(&mut rng);
            rows[s.i1 as usize] += 1.0 / draws as f64;
            cols[s.i2 as usize] += 1.0 / draws as f64;
            *joint.entry((s.i1, s.i2)).or_default() += 1.0 / draws as f64;
        }
        let tv: f64 = r
            .block1()
            .iter()
            .zip(&rows)
            .map(|(x, f)| ((1.2 * x - lz1).exp() - f).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "{tv}");
        let mi: f64 = joint
            .iter()
            .map(|(&(a, b), &pj)| pj * (pj / (rows[a as usize] * cols[b as usize])).ln())
            .sum();
        assert!(mi < 0.01, "{mi}");
    }

    #[test]
    fn low_temperature_concentrates_on_argmax() {
        let p = ModelParams::standard(8, 50.0).unwrap();
        let r = DisorderRealization::new(p, 2);
        let best = (0..256u64)
            .max_by(|&a, &b| r.energy_at(a, true).total_cmp(&r.energy_at(b, true)))
            .unwrap();
        let g = GibbsTable::build(&r, 50.0, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hits = (0..10_000).filter(|_| g.sample(&mut rng).index(4) == best).count();
        assert!(hits as f64 / 10_000.0 > 0.99);
    }

    #[test]
    fn sampled_and_exact_brackets_agree() {
        let p = ModelParams::standard(12, 2.0).unwrap();
        let g = GibbsTable::build(&DisorderRealization::new(p, 21), 2.0, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let h = seed_overlap_histogram(&g, n, &mut rng);
        let exact = g.overlap_distribution();
        for k in 0..4 {
            let se = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
            assert!((h[k] - exact[k]).abs() < 4.0 * se + 1e-12, "bin {k}");
        }
        let v = seed_violation_rate(&g, n, &mut rng);
        let ve = g.ultrametric_violation();
        assert!((v - ve).abs() < 4.0 * (ve * (1.0 - ve) / n as f64).sqrt() + 1e-12);
    }

    #[test]
    fn observable_trivial_and_uniform_cases() {
        let p = ModelParams::standard(8, 0.0).unwrap();
        let one = overlap_observable(&p, true, &ArrayObservable::One, 2, 3, 10, 1).unwrap();
        assert_eq!(one.mean, 1.0);
        let q: ArrayObservable = "mono:k12=1".parse().unwrap();
        let est = overlap_observable(&p, true, &q, 2, 20, 20_000, 2).unwrap();
        let h = 1.0 / 16.0;
        let exact = 0.4 * (h - h * h) + 0.6 * (h - h * h) + h * h;
        assert!(est.z_from(exact) < 4.0, "{} vs {exact}", est.mean);
    }

    #[test]
    fn product_form_matches_table() {
        for (n, beta, seed) in [(10, 0.0, 1), (12, 2.0, 2), (14, 0.8, 3)] {
            let p = ModelParams::standard(n, beta).unwrap();
            let r = DisorderRealization::new(p, seed);
            let t = GibbsTable::build(&r, beta, false).unwrap();
            let g = ProductGibbs::new(&r, beta);
            let (h1, h2) = (t.overlap_distribution(), g.overlap_distribution());
            for k in 0..4 {
                assert!((h1[k] - h2[k]).abs() < 1e-12);
            }
            assert!((t.ultrametric_violation() - g.ultrametric_violation()).abs() < 1e-12);
            assert!((t.log_partition() - g.log_partition()).abs() < 1e-9 * g.log_partition().abs());
        }
    }

    #[test]
    fn cap_is_enforced() {
        let p = ModelParams::standard(28, 1.0).unwrap();
        let r = DisorderRealization::flat(ModelParams::standard(8, 1.0).unwrap());
        assert!(matches!(check_cap(&p), Err(Error::CapExceeded { n: 28, cap: 26 })));
        assert!(GibbsTable::build(&r, f64::NAN, true).is_err());
    }
}
