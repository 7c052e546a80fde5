//! Counter-based random numbers.
//!
//! Disorder fields are never stored as a sequential stream: every Gaussian is
//! a pure function of `(master_seed, field_id, index)`. The uniform for a slot
//! is the SplitMix64 output at position `index` of a stream whose start is
//! derived from the `(seed, field)` key, and Gaussians are obtained from it by
//! inverse-CDF (Wichura's AS241). The transform is monotone in the raw 53-bit
//! uniform, which the exceedance enumeration in [`crate::extremes`] relies on.
//!
//! Sequential streams (cascade sampling, replica draws, coalescents) use
//! ChaCha8 seeded from [`substream_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// SplitMix64 finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over a tag, used to turn purpose strings into key material.
fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Keyed, stateless source of uniforms and Gaussians for one field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CounterStream {
    key: u64,
}

impl CounterStream {
    pub fn new(seed: u64, field_id: u64) -> Self {
        let key = mix64(seed ^ mix64(field_id.wrapping_add(GOLDEN_GAMMA)));
        // Second round so that nearby seeds do not give nearby stream starts.
        Self {
            key: mix64(key.wrapping_add(0x632b_e59b_d9b4_e019)),
        }
    }

    /// Raw 53-bit integer for slot `index`.
    #[inline(always)]
    pub fn bits53(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))) >> 11
    }

    /// Uniform on the open interval (0, 1).
    #[inline(always)]
    pub fn uniform(&self, index: u64) -> f64 {
        bits_to_open_uniform(self.bits53(index))
    }

    /// Standard Gaussian for slot `index`.
    #[inline(always)]
    pub fn gaussian(&self, index: u64) -> f64 {
        gaussian_from_bits(self.bits53(index))
    }
}

const HALF_BITS: u64 = 1 << 52;
const FULL_BITS: u64 = 1 << 53;

/// Monotone map from a 53-bit integer to a standard Gaussian. The upper half
/// is computed from the exact complement so that no uniform rounds to 1.
#[inline(always)]
pub fn gaussian_from_bits(bits: u64) -> f64 {
    if bits < HALF_BITS {
        inverse_normal_cdf(bits_to_open_uniform(bits))
    } else {
        -inverse_normal_cdf(bits_to_open_uniform(FULL_BITS - 1 - bits))
    }
}

/// A 53-bit threshold `k` such that every `bits` with
/// `gaussian_from_bits(bits) >= z` satisfies `bits >= k`.
pub fn bits_threshold(z: f64) -> u64 {
    let k = if z <= 0.0 {
        uniform_to_bits_floor(normal_cdf(z))
    } else {
        // bits >= 2^53 - 1 - m where m is the largest complement index whose
        // Gaussian is still >= z.
        let tail = normal_cdf(-z);
        let m = (tail / TWO_POW_M53 + 1.0).min(FULL_BITS as f64) as u64;
        (FULL_BITS - 1).saturating_sub(m)
    };
    k.saturating_sub(2)
}

#[inline(always)]
pub fn bits_to_open_uniform(bits: u64) -> f64 {
    (bits as f64 + 0.5) * TWO_POW_M53
}

/// Smallest 53-bit integer whose open uniform is `>= u`.
pub fn uniform_to_bits_floor(u: f64) -> u64 {
    if u <= 0.0 {
        return 0;
    }
    if u >= 1.0 {
        return 1 << 53;
    }
    let x = u / TWO_POW_M53 - 0.5;
    if x <= 0.0 {
        0
    } else {
        (x.floor() as u64).min(1 << 53)
    }
}

/// Largest finite value [`inverse_normal_cdf`] can return on a 53-bit uniform.
pub const MAX_COUNTER_GAUSSIAN: f64 = 8.3;

/// Standard normal quantile, Wichura (1988) algorithm AS241 (PPND16).
/// Relative accuracy about 1e-16 over (0, 1).
#[allow(clippy::excessive_precision)] // published coefficients, kept verbatim
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 8] = [
        3.387_132_872_796_366_6,
        1.331_416_678_917_843_8e2,
        1.971_590_950_306_551_3e3,
        1.373_169_376_550_946_1e4,
        4.592_195_393_154_987_1e4,
        6.726_577_092_700_870_1e4,
        3.343_057_558_358_812_8e4,
        2.509_080_928_730_122_7e3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.231_333_070_160_091_1e1,
        6.871_870_074_920_579e2,
        5.394_196_021_424_751e3,
        2.121_379_430_158_659_7e4,
        3.930_789_580_009_271e4,
        2.872_908_573_572_194_3e4,
        5.226_495_278_852_854_5e3,
    ];
    const C: [f64; 8] = [
        1.423_437_110_749_683_5,
        4.630_337_846_156_545,
        5.769_497_221_460_691,
        3.647_848_324_763_204_5,
        1.270_458_252_452_368_4,
        2.417_807_251_774_506_1e-1,
        2.272_384_498_926_918_4e-2,
        7.745_450_142_783_414e-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.053_191_626_637_758_8,
        1.676_384_830_183_803_8,
        6.897_673_349_851e-1,
        1.481_039_764_274_800_8e-1,
        1.519_866_656_361_645_7e-2,
        5.475_938_084_995_345e-4,
        1.050_750_071_644_416_8e-9,
    ];
    const E: [f64; 8] = [
        6.657_904_643_501_103,
        5.463_784_911_164_114,
        1.784_826_539_917_291_3,
        2.965_605_718_285_048_7e-1,
        2.653_218_952_657_612_4e-2,
        1.242_660_947_388_078_4e-3,
        2.711_555_568_743_487_6e-5,
        2.010_334_399_292_288_1e-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.998_322_065_558_879_4e-1,
        1.369_298_809_227_358e-1,
        1.487_536_129_085_061_5e-2,
        7.868_691_311_456_133e-4,
        1.846_318_317_510_054_8e-5,
        1.421_511_758_316_445_9e-7,
        2.044_263_103_389_939_7e-15,
    ];

    #[inline(always)]
    fn poly(c: &[f64; 8], x: f64) -> f64 {
        ((((((c[7] * x + c[6]) * x + c[5]) * x + c[4]) * x + c[3]) * x + c[2]) * x + c[1]) * x + c[0]
    }

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Seed for the substream `(master, tag, index, purpose)`.
pub fn substream_seed(master: u64, tag: &str, index: u64, purpose: &str) -> u64 {
    let mut h = mix64(master ^ 0x5851_f42d_4c95_7f2d);
    h = mix64(h ^ tag_hash(tag));
    h = mix64(h ^ index.wrapping_mul(GOLDEN_GAMMA));
    mix64(h ^ tag_hash(purpose))
}

/// Independent sequential generator for `(master, tag, index, purpose)`.
pub fn substream(master: u64, tag: &str, index: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(master, tag, index, purpose))
}

/// Disorder seed for the `index`-th realization of an experiment.
pub fn disorder_seed(master: u64, index: u64) -> u64 {
    substream_seed(master, "disorder", index, "fields")
}
