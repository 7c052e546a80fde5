//! Extended Ghirlanda-Guerra residuals and the Gaussian integration-by-parts
//! check for the p-power perturbation.
//!
//! For `s >= 2`, a bounded `f` of the overlaps of replicas `1..=s` and a
//! bounded `g` of one overlap, the residual is
//!
//! ```text
//! E<f g(q_{1,s+1})> - (1/s) E<f> E<g(q12)> - (1/s) Σ_{l=2}^s E<f g(q_{1l})>
//! ```
//!
//! The product of two disorder averages is estimated without bias by pairing
//! even and odd disorder indices: each pair contributes
//! `Ā - D̄/s - (B_e C_o + B_o C_e) / (2s)`. Pairing roughly doubles the
//! variance of the product term compared with a plug-in estimate.

use rand_chacha::ChaCha8Rng;

use crate::cascade::{pick_overlap, sample_cascade, CascadeSampler, Pick};
use crate::error::{Error, Result};
use crate::gibbs::GibbsTable;
use crate::model::{Configuration, DisorderRealization, ModelParams, Overlap};
use crate::observable::{ArrayObservable, ScalarObservable};
use crate::parallel::try_map_seeds;
use crate::rng::substream;
use crate::stats::Estimate;

/// Pairwise overlaps of `s` replicas, 1-based.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapArray {
    s: usize,
    q: Vec<Overlap>,
}

impl OverlapArray {
    pub fn from_fn(s: usize, q: impl Fn(usize, usize) -> Overlap) -> Self {
        let mut out = vec![Overlap::Identical; s * s];
        for i in 0..s {
            for j in i + 1..s {
                let v = q(i, j);
                out[i * s + j] = v;
                out[j * s + i] = v;
            }
        }
        Self { s, q: out }
    }

    pub fn len(&self) -> usize {
        self.s
    }

    pub fn is_empty(&self) -> bool {
        self.s == 0
    }

    /// `q_{ij}` with 1-based labels.
    pub fn get(&self, i: usize, j: usize) -> Overlap {
        self.q[(i - 1) * self.s + (j - 1)]
    }
}

/// Anything that yields exchangeable replicas given a disorder realization.
pub trait ReplicaSource: Sync {
    type Realization;

    fn name(&self) -> String;

    /// Value of the overlap `a1` used by observables.
    fn a1(&self) -> f64;

    fn realize(&self, index: u64, seed: u64) -> Result<Self::Realization>;

    fn draw(&self, r: &Self::Realization, s: usize, rng: &mut ChaCha8Rng) -> Result<OverlapArray>;
}

/// Finite-N Gibbs measure of the two-block model.
#[derive(Clone, Debug)]
pub struct GibbsSource {
    pub params: ModelParams,
    pub beta: f64,
    pub perturbed: bool,
}

impl ReplicaSource for GibbsSource {
    type Realization = GibbsTable;

    fn name(&self) -> String {
        format!("gibbs(N={}, perturbed={})", self.params.n, self.perturbed)
    }

    fn a1(&self) -> f64 {
        self.params.a1
    }

    fn realize(&self, _index: u64, seed: u64) -> Result<GibbsTable> {
        GibbsTable::build(&DisorderRealization::new(self.params, seed), self.beta, self.perturbed)
    }

    fn draw(&self, g: &GibbsTable, s: usize, rng: &mut ChaCha8Rng) -> Result<OverlapArray> {
        let reps: Vec<Configuration> = g.sample_replicas(s, rng)?;
        Ok(OverlapArray::from_fn(s, |i, j| Overlap::between(reps[i], reps[j])))
    }
}

/// The normalized cascade.
#[derive(Clone, Debug)]
pub struct CascadeSource {
    pub params: ModelParams,
    pub beta: f64,
    pub eps: f64,
}

impl ReplicaSource for CascadeSource {
    type Realization = CascadeSampler;

    fn name(&self) -> String {
        "cascade".to_string()
    }

    fn a1(&self) -> f64 {
        self.params.a1
    }

    fn realize(&self, _index: u64, seed: u64) -> Result<CascadeSampler> {
        Ok(CascadeSampler::new(&sample_cascade(
            &self.params,
            self.beta,
            self.eps,
            seed,
        )?))
    }

    fn draw(&self, c: &CascadeSampler, s: usize, rng: &mut ChaCha8Rng) -> Result<OverlapArray> {
        let picks: Vec<Pick> = (0..s).map(|_| c.draw(rng)).collect();
        Ok(OverlapArray::from_fn(s, |i, j| {
            let (a, b) = (picks[i], picks[j]);
            if a == b && matches!(a, Pick::Atom(_)) {
                Overlap::Identical
            } else {
                pick_overlap(a, b)
            }
        }))
    }
}

/// Per-realization averages `(A, B, C, D)`.
fn realization_terms<S: ReplicaSource>(
    src: &S,
    r: &S::Realization,
    f: &ArrayObservable,
    g: &ScalarObservable,
    s: usize,
    n_inner: u64,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; 4]> {
    let a1 = src.a1();
    let mut t = [0.0; 4];
    for _ in 0..n_inner {
        let q = src.draw(r, s + 1, rng)?;
        let fv = f.eval(a1, |i, j| q.get(i, j));
        t[0] += fv * g.eval(a1, q.get(1, s + 1));
        t[1] += fv;
        t[2] += g.eval(a1, q.get(1, 2));
        t[3] += (2..=s).map(|l| fv * g.eval(a1, q.get(1, l))).sum::<f64>();
    }
    Ok(t.map(|x| x / n_inner as f64))
}

/// Residual estimate over `n_outer` realizations (rounded down to an even
/// number) with `n_inner` draws of `s + 1` replicas each.
pub fn eggi_residual<S: ReplicaSource>(
    src: &S,
    f: &ArrayObservable,
    g: &ScalarObservable,
    s: usize,
    n_outer: u64,
    n_inner: u64,
    master: u64,
) -> Result<Estimate> {
    if s < 2 {
        return Err(Error::config("s", "need at least 2 replicas"));
    }
    if f.arity() > s {
        return Err(Error::config("f", format!("`{f}` reads replicas beyond s = {s}")));
    }
    if n_outer < 2 || n_inner == 0 {
        return Err(Error::config("seeds", "need at least 2 realizations and 1 inner draw"));
    }
    let n = n_outer / 2 * 2;
    let terms = try_map_seeds(master, n, |i, seed| {
        let r = src.realize(i, seed)?;
        let mut rng = substream(master, "eggi", i, "replicas");
        realization_terms(src, &r, f, g, s, n_inner, &mut rng)
    })?;
    let sf = s as f64;
    Ok(Estimate::from_samples(
        format!("eggi[{}; f={f}; g={g}; s={s}]", src.name()),
        terms.chunks_exact(2).map(|p| {
            let (e, o) = (p[0], p[1]);
            (e[0] + o[0]) / 2.0 - (e[3] + o[3]) / (2.0 * sf) - (e[1] * o[2] + o[1] * e[2]) / (2.0 * sf)
        }),
    ))
}

/// Settings of the integration-by-parts experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct IbpSettings {
    pub p_power: u32,
    pub beta_p: f64,
    pub delta_n: f64,
    pub s: usize,
    pub f: ArrayObservable,
    /// Replica tuples per seed for non-constant `f`; constant `f` is exact.
    pub n_draws: u64,
}

impl IbpSettings {
    /// `δ_N = N^{-1/16}`.
    pub fn default_delta(n: u32) -> f64 {
        (n as f64).powf(-1.0 / 16.0)
    }
}

/// Both sides of the identity and their per-seed difference.
#[derive(Clone, Debug, PartialEq)]
pub struct IbpResult {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub diff: Estimate,
}

/// Largest N for the exact inner brackets of [`ibp_check`].
pub const IBP_N_CAP: u32 = 12;

/// Gibbs measure of `β X_σ + √δ_N β_p Y^p_σ`, where `X` is the unperturbed
/// energy and `Y^p` the p-field.
pub fn ibp_table(r: &DisorderRealization, beta: f64, st: &IbpSettings) -> Result<(GibbsTable, Vec<f64>)> {
    let p = *r.params();
    let y = r.p_field(st.p_power)?;
    let c = st.delta_n.sqrt() * st.beta_p;
    let log_w = (0..p.num_configs() as u64)
        .zip(&y)
        .map(|(i, yi)| beta * r.energy_at(i, false) + c * yi)
        .collect();
    Ok((GibbsTable::from_log_weights(p, r.seed(), beta, log_w)?, y))
}

/// Gaussian integration by parts in the p-field gives, at every N,
///
/// ```text
/// E<Y^p_{σ1} f>/N = β_p √δ_N (Σ_{l=1}^s E<q^p_{1l} f> - s E<q^p_{1,s+1} f>)
/// ```
///
/// (`q_{11} = 1`). `lhs` and `rhs` are the two sides; `diff` is their
/// per-seed difference, whose standard error accounts for the correlation
/// between the sides.
pub fn ibp_check(p: &ModelParams, st: &IbpSettings, n_seeds: u64, master: u64) -> Result<IbpResult> {
    if p.n > IBP_N_CAP {
        return Err(Error::CapExceeded { n: p.n, cap: IBP_N_CAP });
    }
    if st.p_power < 1 || st.s < 1 || st.f.arity() > st.s {
        return Err(Error::config(
            "ibp",
            "need p >= 1, s >= 1 and f reading at most s replicas",
        ));
    }
    if !(st.delta_n >= 0.0) || !st.beta_p.is_finite() {
        return Err(Error::config("delta_N", "must be >= 0"));
    }
    let exact = st.f == ArrayObservable::One || st.f == ArrayObservable::Monomial(Default::default());
    if !exact && st.n_draws == 0 {
        return Err(Error::config("n_draws", "must be positive for non-constant f"));
    }
    let n = p.n as f64;
    let c = st.beta_p * st.delta_n.sqrt();
    let pw = st.p_power as i32;
    let s = st.s;
    let rows = try_map_seeds(master, n_seeds, |i, seed| -> Result<(f64, f64)> {
        let r = DisorderRealization::new(*p, seed);
        let (g, y) = ibp_table(&r, p.beta, st)?;
        if exact {
            let lhs = g
                .iter()
                .map(|(cfg, w)| w * y[cfg.index(p.half()) as usize])
                .sum::<f64>()
                / n;
            let m: f64 = g
                .overlap_distribution()
                .iter()
                .zip(Overlap::ALL)
                .map(|(h, q)| h * q.value(p.a1).powi(pw))
                .sum();
            return Ok((lhs, c * (1.0 - m)));
        }
        let mut rng = substream(master, "ibp", i, "replicas");
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for _ in 0..st.n_draws {
            let reps = g.sample_replicas(s + 1, &mut rng)?;
            let q = |a: usize, b: usize| Overlap::between(reps[a - 1], reps[b - 1]).value(p.a1).powi(pw);
            let fv = st.f.eval(p.a1, |a, b| Overlap::between(reps[a - 1], reps[b - 1]));
            lhs += y[reps[0].index(p.half()) as usize] * fv / n;
            rhs += c * fv * ((1..=s).map(|l| q(1, l)).sum::<f64>() - s as f64 * q(1, s + 1));
        }
        Ok((lhs / st.n_draws as f64, rhs / st.n_draws as f64))
    })?;
    Ok(IbpResult {
        lhs: Estimate::from_samples("ibp_lhs", rows.iter().map(|r| r.0)),
        rhs: Estimate::from_samples("ibp_rhs", rows.iter().map(|r| r.1)),
        diff: Estimate::from_samples("ibp_lhs_minus_rhs", rows.iter().map(|r| r.0 - r.1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::p_field_scales;

    fn cascade() -> CascadeSource {
        CascadeSource {
            params: ModelParams::standard(16, 2.0).unwrap(),
            beta: 2.0,
            eps: 1e-4,
        }
    }

    #[test]
    fn trivial_observables_give_zero() {
        for s in 2..5 {
            let r = eggi_residual(&cascade(), &ArrayObservable::One, &ScalarObservable::One, s, 20, 5, 1).unwrap();
            assert!(r.mean.abs() < 1e-12 && r.std_error < 1e-12, "{r:?}");
        }
        assert!(eggi_residual(&cascade(), &ArrayObservable::One, &ScalarObservable::One, 1, 20, 5, 1).is_err());
        let wide: ArrayObservable = "mono:k13=1".parse().unwrap();
        assert!(eggi_residual(&cascade(), &wide, &ScalarObservable::One, 2, 20, 5, 1).is_err());
    }

    #[test]
    fn cascade_satisfies_the_identities() {
        let f: ArrayObservable = "mono:k12=1".parse().unwrap();
        let r = eggi_residual(&cascade(), &f, &ScalarObservable::Power(1), 2, 4000, 50, 2).unwrap();
        assert!(r.mean.abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn label_permutation_symmetry() {
        let f: ArrayObservable = "mono:k12=1,k13=2".parse().unwrap();
        let g = ScalarObservable::Indicator(Overlap::FirstBlock);
        let swapped = f.relabeled(&[1, 3, 2]).unwrap();
        let a = eggi_residual(&cascade(), &f, &g, 3, 2000, 50, 3).unwrap();
        let b = eggi_residual(&cascade(), &swapped, &g, 3, 2000, 50, 3).unwrap();
        assert!(a.z_distance(&b) < 3.0 * std::f64::consts::SQRT_2, "{a:?} {b:?}");
    }

    #[test]
    fn p_field_covariance() {
        let p = ModelParams::standard(8, 2.0).unwrap();
        let (u, v, w) = p_field_scales(&p, 1);
        assert_eq!(w, 0.0);
        assert!((u * u + v * v - 8.0).abs() < 1e-12);
        let (s, t) = (Configuration::new(3, 1), Configuration::new(3, 2));
        let mut cov = Estimate::empty("cov");
        let mut var = Estimate::empty("var");
        for seed in 0..40_000 {
            let r = DisorderRealization::new(p, seed);
            let (a, b) = (r.p_field_energy(2, s).unwrap(), r.p_field_energy(2, t).unwrap());
            cov.push(a * b);
            var.push(a * a);
        }
        assert!(cov.z_from(8.0 * 0.36) < 3.0, "{cov:?}");
        assert!(var.z_from(8.0) < 3.0, "{var:?}");
    }

    fn settings(delta_n: f64, beta_p: f64) -> IbpSettings {
        IbpSettings {
            p_power: 2,
            beta_p,
            delta_n,
            s: 1,
            f: ArrayObservable::One,
            n_draws: 0,
        }
    }

    #[test]
    fn uniform_measure_by_enumeration() {
        let p = ModelParams::standard(8, 0.0).unwrap();
        let st = settings(0.5, 0.0);
        let res = ibp_check(&p, &st, 3, 7).unwrap();
        let lhs: Vec<f64> = (0..3)
            .map(|i| {
                let r = DisorderRealization::new(p, crate::rng::disorder_seed(7, i));
                r.p_field(2).unwrap().iter().sum::<f64>() / (8.0 * 256.0)
            })
            .collect();
        let mean = lhs.iter().sum::<f64>() / 3.0;
        assert!((res.lhs.mean - mean).abs() < 1e-12);
        assert_eq!(res.rhs.mean, 0.0);
    }

    #[test]
    fn exact_brackets_match_enumeration() {
        let p = ModelParams::standard(8, 1.0).unwrap();
        let st = settings(0.7, 0.8);
        let r = DisorderRealization::new(p, crate::rng::disorder_seed(4, 0));
        let y = r.p_field(2).unwrap();
        let logw: Vec<f64> = (0..256u64)
            .map(|i| r.energy_at(i, false) + 0.8 * 0.7f64.sqrt() * y[i as usize])
            .collect();
        let z: f64 = logw.iter().map(|w| w.exp()).sum();
        let prob: Vec<f64> = logw.iter().map(|w| w.exp() / z).collect();
        let mut m = 0.0;
        for a in 0..256u64 {
            for b in 0..256u64 {
                let q = Overlap::between(Configuration::from_index(a, 4), Configuration::from_index(b, 4));
                m += prob[a as usize] * prob[b as usize] * q.value(p.a1).powi(2);
            }
        }
        let lhs: f64 = prob.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / 8.0;
        let res = ibp_check(&p, &st, 1, 4).unwrap();
        assert!((res.lhs.mean - lhs).abs() < 1e-10, "{} vs {lhs}", res.lhs.mean);
        assert!((res.rhs.mean - 0.8 * 0.7f64.sqrt() * (1.0 - m)).abs() < 1e-10);
    }

    #[test]
    fn identity_holds() {
        let p = ModelParams::standard(8, 1.5).unwrap();
        let res = ibp_check(&p, &settings(IbpSettings::default_delta(8), 1.0), 3000, 11).unwrap();
        assert!(res.diff.mean.abs() < 3.0 * res.diff.std_error, "{:?}", res.diff);
        let f: ArrayObservable = "ind:q12=a1".parse().unwrap();
        let st = IbpSettings {
            s: 2,
            f,
            n_draws: 200,
            ..settings(0.8, 1.0)
        };
        let res = ibp_check(&p, &st, 1500, 12).unwrap();
        assert!(res.diff.mean.abs() < 3.0 * res.diff.std_error, "{:?}", res.diff);
    }

    #[test]
    fn no_coupling_without_field() {
        let p = ModelParams::standard(8, 1.5).unwrap();
        let res = ibp_check(&p, &settings(0.0, 1.0), 3000, 13).unwrap();
        assert_eq!(res.rhs.mean, 0.0);
        assert!(res.lhs.mean.abs() < 3.0 * res.lhs.std_error);
        let big = ModelParams::standard(14, 1.5).unwrap();
        assert!(matches!(
            ibp_check(&big, &settings(0.0, 1.0), 1, 1),
            Err(Error::CapExceeded { .. })
        ));
    }
}
